"""Configure Django for pytest; the tests are Django test cases (manage.py test)."""

import os

import django

os.environ.setdefault("DJANGO_SETTINGS_MODULE", "project.settings")
django.setup()
