"""
SUR Association - API Module
"""
