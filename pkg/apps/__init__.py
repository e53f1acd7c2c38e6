# EMODM Apps Package
