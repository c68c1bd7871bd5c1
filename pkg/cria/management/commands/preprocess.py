from cria.management.base import CriaCommand


class Command(CriaCommand):
    help = 'EDF или файл срезов → ресемплинг, полосовой и режекторный фильтры, нарезка, нормировка'

    def add_command_arguments(self, parser):
        parser.add_argument('inputs', nargs='+', help='Файлы .edf или файлы срезов CRIA')
        parser.add_argument('--out', required=True, help='Куда записать файл срезов')
        parser.add_argument('--label', type=int, help='Метка для всех срезов (для EDF без меток)')
        parser.add_argument('--n-classes', type=int, default=0, help='Число классов (0 — по меткам)')

    def run(self, options):
        from cria.services import run_preprocess
        cfg = self.load_config(options)
        ds = run_preprocess(options['inputs'], options['out'], cfg, options['label'], options['n_classes'])
        self.stdout.write(self.style.SUCCESS(
            f'{len(ds)} срезов по {ds.slice_length} отсчётов на {ds.sample_rate:g} Гц → {options["out"]}'
        ))
