from cria.management.base import CriaCommand


class Command(CriaCommand):
    help = 'Оценка под шумом: каждый вид шума на уровнях none, low, mid, high'

    def add_command_arguments(self, parser):
        from cria.services import SPLITS
        parser.add_argument('dataset', help='Файл срезов с метками')
        parser.add_argument('--checkpoint', required=True, help='Чекпоинт после finetune')
        parser.add_argument('--split', choices=SPLITS, default='test')
        parser.add_argument('--out', help='Каталог для robustness.csv')

    def run(self, options):
        from cria.services import run_robustness
        cfg = self.load_config(options)
        out = options['out'] or self.data_path('robustness')
        rows = run_robustness(options['dataset'], options['checkpoint'], cfg, options['split'], out)
        self.stdout.write(f'{"вид":<18}{"уровень":<9}{"bacc":>8}{"auroc":>8}{"kappa":>8}')
        for r in rows:
            self.stdout.write(f'{r["kind"]:<18}{r["level"]:<9}{r["bacc"]:>8.4f}{r["auroc"]:>8.4f}{r["kappa"]:>8.4f}')
        self.stdout.write(self.style.SUCCESS(f'Таблица записана в {out}/robustness.csv'))
