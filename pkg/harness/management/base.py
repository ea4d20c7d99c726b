import logging

from django.core.management.base import BaseCommand, CommandError

from harness.config import load_run_config
from numeric.exceptions import AtvLabError, ConfigError, ContractError, DataIntegrityError

logger = logging.getLogger(__name__)

EXIT_VERIFICATION = 1
EXIT_CONFIG = 2
EXIT_DATA = 3


class VerificationFailed(Exception):
    pass


def parse_overrides(pairs):
    overrides = {}
    for pair in pairs or ():
        key, sep, value = pair.partition('=')
        if not sep or not key.strip():
            raise ConfigError('malformed --set', {'--set': [f'expected key=value, got {pair!r}']})
        overrides[key.strip()] = value.strip()
    return overrides


class LabCommand(BaseCommand):
    """Maps lab errors onto exit codes: 1 verification, 2 config, 3 data."""

    def add_config_arguments(self, parser):
        parser.add_argument('--config', help='key=value run config file')
        parser.add_argument('--set', action='append', default=[], metavar='KEY=VALUE',
                            help='override one config key (repeatable)')

    def run_config(self, options):
        overrides = parse_overrides(options.get('set'))
        return load_run_config(path=options.get('config'), overrides=overrides)

    def execute(self, *args, **options):
        try:
            return super().execute(*args, **options)
        except ConfigError as exc:
            raise CommandError(f'config error: {exc}', returncode=EXIT_CONFIG) from exc
        except (DataIntegrityError, ContractError) as exc:
            raise CommandError(f'data error: {exc}', returncode=EXIT_DATA) from exc
        except VerificationFailed as exc:
            raise CommandError(str(exc), returncode=EXIT_VERIFICATION) from exc
        except AtvLabError as exc:
            logger.exception('unexpected lab error')
            raise CommandError(str(exc), returncode=EXIT_DATA) from exc

    def done(self, message):
        self.stdout.write(self.style.SUCCESS(message))
