"""
SUR Association - Tests Module
"""
