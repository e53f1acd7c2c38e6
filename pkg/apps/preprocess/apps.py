from django.apps import AppConfig


class PreprocessConfig(AppConfig):
    name = 'apps.preprocess'
    verbose_name = 'Series preprocessing'
