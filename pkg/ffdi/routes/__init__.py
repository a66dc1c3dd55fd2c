"""
HTTP blueprints package.
"""
