from django.apps import AppConfig


class DiffengineConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'diffengine'
