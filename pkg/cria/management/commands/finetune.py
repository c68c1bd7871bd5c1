from cria.management.base import CriaCommand


class Command(CriaCommand):
    help = 'Дообучение классификатора поверх предобученного энкодера или с нуля'

    def add_command_arguments(self, parser):
        parser.add_argument('dataset', help='Файл срезов с метками')
        parser.add_argument('--checkpoint', help='Чекпоинт предобучения; без него — обучение с нуля')
        parser.add_argument('--out', help='Каталог для finetune.ckpt и finetune_metrics.csv')
        parser.add_argument('--seed', type=int)
        parser.add_argument('--steps', type=int, help='Число шагов (перекрывает finetune_steps)')

    def run(self, options):
        from cria.services import run_finetune
        cfg = self.load_config(options, seed=options['seed'])
        out = options['out'] or self.data_path('finetune')
        if not options['checkpoint']:
            self.stdout.write(self.style.WARNING('Чекпоинт не указан, энкодер инициализируется случайно'))
        state = run_finetune(options['dataset'], out, cfg, options['steps'], options['checkpoint'])
        self.stdout.write(self.style.SUCCESS(f'Дообучение завершено: шаг {state.step}, чекпоинт {out}/finetune.ckpt'))
