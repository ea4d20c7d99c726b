from harness.management.base import LabCommand
from harness.runs import train_run


class Command(LabCommand):
    help = 'Train the configured method once per seed and write one run directory each.'

    def add_arguments(self, parser):
        self.add_config_arguments(parser)
        parser.add_argument('--seed', type=int, action='append', dest='seeds',
                            help='seed to train (repeatable); defaults to the config seeds')
        parser.add_argument('--out', help='output root; defaults to the config value')

    def handle(self, *args, **options):
        config = self.run_config(options)
        seeds = options['seeds'] or config.seeds
        for seed in seeds:
            run_dir, report = train_run(config, seed, options['out'])
            last = f'{report.epoch_losses[-1]:.4f}' if report.epoch_losses else 'n/a'
            self.done(f'{config.method} seed {seed}: final loss {last} -> {run_dir}')
