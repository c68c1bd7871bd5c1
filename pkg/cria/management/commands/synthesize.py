from cria.management.base import CriaCommand


class Command(CriaCommand):
    help = 'Синтетический датасет: смесь тонов в полосах классов на гауссовом фоне'

    def add_command_arguments(self, parser):
        parser.add_argument('--out', required=True, help='Путь к файлу срезов')
        parser.add_argument('--seed', type=int)
        parser.add_argument('--classes', type=int)
        parser.add_argument('--channels', type=int)
        parser.add_argument('--per-class', type=int)

    def run(self, options):
        from cria.services import run_synthesize
        cfg = self.load_config(options, seed=options['seed'], syn_classes=options['classes'],
                               syn_channels=options['channels'], syn_per_class=options['per_class'])
        ds = run_synthesize(options['out'], cfg)
        self.stdout.write(self.style.SUCCESS(
            f'Записано {len(ds)} срезов ({len(ds.channel_names)} каналов, {ds.n_classes} классов) → {options["out"]}'
        ))
