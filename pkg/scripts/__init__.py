"""
SUR Association - Scripts Module
"""
