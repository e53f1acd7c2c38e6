"""
Django settings for the emodm project.
EMODM - abnormal pattern detection for complex-system time series.
"""

import os
from pathlib import Path

from dotenv import load_dotenv

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

# Local overrides (.env is optional)
load_dotenv(BASE_DIR / '.env')


# =============================================================================
# CORE SETTINGS
# =============================================================================

# Only management commands run; the key is never used for signing.
SECRET_KEY = os.environ.get(
    'DJANGO_SECRET_KEY',
    'emodm-insecure-dev-key'
)

DEBUG = os.environ.get('DJANGO_DEBUG', 'False').lower() == 'true'

ALLOWED_HOSTS = []


# =============================================================================
# APPLICATION DEFINITION
# =============================================================================

INSTALLED_APPS = [
    # Local apps
    'apps.mixture',
    'apps.preprocess',
    'apps.detector',
    'apps.benchmarks',
    'apps.baselines',
    'apps.ingest',
]

MIDDLEWARE = []


# =============================================================================
# DATABASE
# =============================================================================

# File-in/file-out toolkit: no models, no database.
DATABASES = {}


# =============================================================================
# INTERNATIONALIZATION
# =============================================================================

LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_I18N = False

USE_TZ = True


# =============================================================================
# LOGGING
# =============================================================================

LOG_LEVEL = os.environ.get('EMODM_LOG_LEVEL', 'INFO').upper()

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'plain': {
            'format': '%(asctime)s %(levelname)s %(name)s: %(message)s',
        },
    },
    'handlers': {
        'stderr': {
            'class': 'logging.StreamHandler',
            'stream': 'ext://sys.stderr',
            'formatter': 'plain',
        },
    },
    'loggers': {
        'apps': {
            'handlers': ['stderr'],
            'level': LOG_LEVEL,
            'propagate': False,
        },
        'emodm': {
            'handlers': ['stderr'],
            'level': LOG_LEVEL,
            'propagate': False,
        },
    },
}


# =============================================================================
# DETECTION SETTINGS
# =============================================================================

def _env_float(name, default):
    return float(os.environ.get(name, default))


def _env_int(name, default):
    return int(os.environ.get(name, default))


EMODM = {
    # Posterior threshold alpha_f
    'ALPHA_F': _env_float('EMODM_ALPHA_F', 0.95),
    'WARMUP_COUNT': _env_int('EMODM_WARMUP_COUNT', 50),
    'REFIT_PERIOD': _env_int('EMODM_REFIT_PERIOD', 100),

    # EM fitting
    'MAX_ITERATIONS': _env_int('EMODM_MAX_ITERATIONS', 500),
    'REL_LOGLIK_TOLERANCE': _env_float('EMODM_REL_LOGLIK_TOLERANCE', 1e-8),
    'VARIANCE_FLOOR_FACTOR': _env_float('EMODM_VARIANCE_FLOOR_FACTOR', 1e-6),

    # Rate transform guard, relative to max |x|
    'DENOM_EPSILON_FACTOR': _env_float('EMODM_DENOM_EPSILON_FACTOR', 1e-12),

    # Fallback seed when --seed is not given
    'SEED': _env_int('EMODM_SEED', 0),

    'OUTPUT_DIR': os.environ.get('EMODM_OUTPUT_DIR', str(BASE_DIR / 'runs')),
}


# =============================================================================
# TELEGRAM ALARM SETTINGS
# =============================================================================

TELEGRAM_BOT_TOKEN = os.environ.get('TELEGRAM_BOT_TOKEN', '')
TELEGRAM_CHAT_ID = os.environ.get('TELEGRAM_CHAT_ID', '')
