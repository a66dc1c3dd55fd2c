"""
Service modules package.
"""
