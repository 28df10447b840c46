# Empty __init__.py
