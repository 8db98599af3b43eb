"""
ponv_tool - PONV prediction toolkit: clinical risk scores, balanced cohort
splitting, grammar-guided pipeline search and model explanation
"""

__version__ = "0.1.0"
