import os

import django

os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'emodm.settings')
django.setup()
