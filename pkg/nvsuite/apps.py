from django.apps import AppConfig


class NvsuiteConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'nvsuite'
