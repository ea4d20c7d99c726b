import os
from pathlib import Path


# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent


# SECURITY WARNING: keep the secret key used in production secret!
SECRET_KEY = os.environ.get(
    'ATVLAB_SECRET_KEY', 'django-insecure-atvlab-local-only-6k2#r!v0q9z1m8x4w7p3s5n')

# SECURITY WARNING: don't run with debug turned on in production!
DEBUG = os.environ.get('ATVLAB_DEBUG', '1') == '1'

ALLOWED_HOSTS = ['localhost', '127.0.0.1', '0.0.0.0', 'atvlab']


# Application definition

INSTALLED_APPS = [
    'django.contrib.admin',
    'django.contrib.auth',
    'django.contrib.contenttypes',
    'django.contrib.sessions',
    'django.contrib.messages',
    'django.contrib.staticfiles',
    'django_filters',
    'graphene_django',
    'numeric',
    'transformer',
    'atv',
    'baselines',
    'theory',
    'tasks',
    'harness',
]

MIDDLEWARE = [
    'django.middleware.security.SecurityMiddleware',
    'django.contrib.sessions.middleware.SessionMiddleware',
    'django.middleware.common.CommonMiddleware',
    'django.middleware.csrf.CsrfViewMiddleware',
    'django.contrib.auth.middleware.AuthenticationMiddleware',
    'django.contrib.messages.middleware.MessageMiddleware',
    'django.middleware.clickjacking.XFrameOptionsMiddleware',
]

ROOT_URLCONF = 'atvlab.urls'

TEMPLATES = [
    {
        'BACKEND': 'django.template.backends.django.DjangoTemplates',
        'DIRS': [],
        'APP_DIRS': True,
        'OPTIONS': {
            'context_processors': [
                'django.template.context_processors.debug',
                'django.template.context_processors.request',
                'django.contrib.auth.context_processors.auth',
                'django.contrib.messages.context_processors.messages',
            ],
        },
    },
]

WSGI_APPLICATION = 'atvlab.wsgi.application'


# Database
# https://docs.djangoproject.com/en/4.2/ref/settings/#databases

DATABASES = {
    'default': {
        'ENGINE': 'django.db.backends.sqlite3',
        'NAME': os.environ.get('ATVLAB_DB_PATH', BASE_DIR / 'atvlab.sqlite3'),
    }
}


# Internationalization
# https://docs.djangoproject.com/en/4.2/topics/i18n/

LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_I18N = True

USE_TZ = True


STATIC_URL = 'static/'

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'


GRAPHENE = {
    'SCHEMA': 'harness.schema.schema',
}


LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'verbose': {
            'format': '{asctime} {levelname} {name}: {message}',
            'style': '{',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'verbose',
        },
    },
    'loggers': {
        app: {
            'handlers': ['console'],
            'level': os.environ.get('ATVLAB_LOG_LEVEL', 'INFO'),
            'propagate': False,
        }
        for app in ('numeric', 'transformer', 'atv', 'baselines', 'theory', 'tasks', 'harness')
    },
}


# Library defaults. Run config files override the experiment keys; the rest
# (test bucket sizes, theory dims) are fixed per installation.
ATVLAB = {
    'LARGE': {
        'n_layers': 6,
        'd_model': 64,
        'n_heads': 4,
        'ffn_dim': 256,
        'max_seq_len': 256,
        'tie_embeddings': False,
    },
    'GENERATOR': {
        'n_layers': 2,
        'd_model': 32,
        'n_heads': 4,
        'ffn_dim': 128,
    },
    'TRAIN': {
        'epochs': 15,
        'lr': 5e-4,
        'weight_decay': 1e-5,
        'batch_size': 1,
    },
    'PRETRAIN': {
        'epochs': 3,
        'lr': 1e-3,
        'statements': 400,
    },
    'SEEDS': (42, 100, 10),
    'ATV': {
        'lambda': 0.001,
        'layers': 'all',
        'policy': 'current_last',
    },
    'FTV': {
        'lambda': 0.001,
    },
    'LORA': {
        'rank': 8,
        'alpha': 32.0,
        'dropout': 0.05,
        'lr': 4e-4,
    },
    'PREFIX': {
        'length': 4,
    },
    'ICL': {
        'k': 4,
    },
    'DATA': {
        'families': ('parity', 'modsum', 'maxpos', 'contains', 'duplicate'),
        'n_train': 90,
        'n_test': 30,
    },
    'CAPACITY_LADDER': (16, 32, 64, 128),
    'THEORY': {
        'trials': 100,
        'seed': 42,
        'theorem1': {'d_l': 64, 'd_s': 8},
        'theorem2': {'T': 6, 'm': 5, 'd_l': 16},
    },
}
