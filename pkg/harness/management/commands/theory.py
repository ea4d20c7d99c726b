import json
from pathlib import Path

from django.conf import settings

from harness.management.base import LabCommand, VerificationFailed
from harness.persistence import record_theory
from numeric.exceptions import ConfigError, DimensionError
from theory.verify import EQUIVALENCE_TOL, verify_theorem1, verify_theorem2


class Command(LabCommand):
    help = ('Randomised verification of ATV/LoRA equivalence and of the prefix '
            'containment decomposition. Exits 1 on any failed check.')

    def add_arguments(self, parser):
        defaults = settings.ATVLAB['THEORY']
        parser.add_argument('--trials', type=int, default=defaults['trials'])
        parser.add_argument('--seed', type=int, default=defaults['seed'])
        parser.add_argument('--tol', type=float, default=EQUIVALENCE_TOL,
                            help='relative error bound for the increment equalities')
        parser.add_argument('--d-l', type=int, help='large width for both suites')
        parser.add_argument('--d-s', type=int, help='generator width (= LoRA rank)')
        parser.add_argument('--out', default='theory_report.json')

    def handle(self, *args, **options):
        defaults = settings.ATVLAB['THEORY']
        dims1, dims2 = dict(defaults['theorem1']), dict(defaults['theorem2'])
        if options['d_l']:
            dims1['d_l'] = dims2['d_l'] = options['d_l']
        if options['d_s']:
            dims1['d_s'] = options['d_s']
        trials, seed = options['trials'], options['seed']
        try:
            reports = (verify_theorem1(trials, seed, dims1, tol=options['tol']),
                       verify_theorem2(trials, seed, dims2))
        except DimensionError as exc:
            raise ConfigError('invalid theory dims', {'dims': [str(exc)]}) from exc

        out = Path(options['out'])
        out.parent.mkdir(parents=True, exist_ok=True)
        payload = {'seed': seed, 'trials': trials,
                   'passed': all(r.passed for r in reports),
                   'reports': [r.to_dict() for r in reports]}
        out.write_text(json.dumps(payload, indent=2, sort_keys=True) + '\n', encoding='utf-8')
        record_theory(f'seed{seed}-trials{trials}', *reports)

        for report in reports:
            self.stdout.write(f'{report.name}: {len(report.records)} checks, '
                              f'max rel. err {report.max_rel_err():.3e}, '
                              f'{len(report.failures)} failed')
        failures = [(report, record) for report in reports for record in report.failures]
        if failures:
            for report, record in failures:
                self.stderr.write(json.dumps({
                    'suite': report.name, 'seed': seed, 'trial': record.trial,
                    'rng': [seed, record.trial], 'dims': report.dims, **record.to_dict()},
                    sort_keys=True))
            raise VerificationFailed(f'{len(failures)} checks failed; report in {out}')
        self.done(f'all checks passed; report in {out}')
