# jobs/__init__.py
# Training run records
