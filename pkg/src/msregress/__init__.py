"""Morse-Smale piecewise regression."""
