from django.apps import AppConfig


class AtvConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'atv'
