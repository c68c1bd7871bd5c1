from cria.management.base import CriaCommand


class Command(CriaCommand):
    help = 'Контрастное предобучение с маскированием видов'

    def add_command_arguments(self, parser):
        parser.add_argument('dataset', help='Файл срезов')
        parser.add_argument('--out', help='Каталог для чекпоинтов и pretrain_loss.csv (по умолчанию CRIA_DATA_DIR/pretrain)')
        parser.add_argument('--seed', type=int)
        parser.add_argument('--steps', type=int, help='Число шагов (перекрывает pretrain_steps)')

    def run(self, options):
        from cria.services import run_pretrain
        cfg = self.load_config(options, seed=options['seed'])
        out = options['out'] or self.data_path('pretrain')
        state = run_pretrain(options['dataset'], out, cfg, options['steps'])
        self.stdout.write(self.style.SUCCESS(f'Предобучение завершено: шаг {state.step}, чекпоинт {out}/pretrain.ckpt'))
