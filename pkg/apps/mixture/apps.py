from django.apps import AppConfig


class MixtureConfig(AppConfig):
    name = 'apps.mixture'
    verbose_name = 'Two-state Gaussian mixture'
