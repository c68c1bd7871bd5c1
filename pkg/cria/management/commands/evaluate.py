from cria.management.base import CriaCommand


class Command(CriaCommand):
    help = 'Метрики дообученной модели на отложенной части датасета'

    def add_command_arguments(self, parser):
        from cria.services import SPLITS
        parser.add_argument('dataset', help='Файл срезов с метками')
        parser.add_argument('--checkpoint', required=True, help='Чекпоинт после finetune')
        parser.add_argument('--split', choices=SPLITS, default='test')
        parser.add_argument('--out', help='Каталог для metrics.csv и confusion.csv')

    def run(self, options):
        from cria.services import run_evaluate
        cfg = self.load_config(options)
        report = run_evaluate(options['dataset'], options['checkpoint'], cfg, options['split'], options['out'])
        self.stdout.write(f'Часть {options["split"]}, срезов: {report.n}')
        for key, value in report.as_row().items():
            if key != 'n':
                self.stdout.write(f'  {key:<12} {value:.4f}')
        self.stdout.write('Матрица ошибок (строки — истинные классы):')
        for row in report.confusion_matrix:
            self.stdout.write('  ' + ' '.join(f'{v:>5}' for v in row))
