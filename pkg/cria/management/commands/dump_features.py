from cria.management.base import CriaCommand


class Command(CriaCommand):
    help = 'Выгрузка признаков видов по слоям энкодера в CSV'

    def add_command_arguments(self, parser):
        from cria.services import SPLITS
        parser.add_argument('dataset', help='Файл срезов')
        parser.add_argument('--checkpoint', required=True)
        parser.add_argument('--out', required=True, help='CSV-файл')
        parser.add_argument('--split', choices=SPLITS, default='test')
        parser.add_argument('--limit', type=int, default=4, help='Сколько срезов выгрузить')

    def run(self, options):
        from cria.services import dump_features
        cfg = self.load_config(options)
        path = dump_features(options['dataset'], options['checkpoint'], options['out'], cfg,
                             options['split'], options['limit'])
        self.stdout.write(self.style.SUCCESS(f'Признаки записаны в {path}'))
