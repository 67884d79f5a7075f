# Marker file for Python package
