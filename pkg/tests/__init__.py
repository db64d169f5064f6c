"""tailcal test suite"""
