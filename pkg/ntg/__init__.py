# Multi-scale neural texture transfer
