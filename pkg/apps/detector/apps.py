from django.apps import AppConfig


class DetectorConfig(AppConfig):
    name = 'apps.detector'
    verbose_name = 'Abnormal pattern detection'
