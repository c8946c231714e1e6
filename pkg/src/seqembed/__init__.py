"""Sequence embedding via a codon-stride conv + recurrent classifier."""
