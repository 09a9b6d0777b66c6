import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional

import hydra
import pytorch_lightning as pl
from hydra.errors import HydraException
from omegaconf import DictConfig, OmegaConf
from torch.utils.data import DataLoader

from .datasets.manifest import ManifestDataset, export_dataset
from .datasets.synthetic import SPLIT_OFFSETS
from .models.config import REFINERS
from .ode.problems import ANALYTIC_PROBLEMS, get_problem
from .ode.solvers import FIXED_METHODS, ADAPTIVE_METHODS, SolverConfig, odeint
from .training.run import ablate_time, evaluate, infer, train
from .utils.codecs import read_ppm, write_flo, write_ppm
from .utils.config import compose_config, echo_config, read_config_file, setup_logging
from .utils.errors import ConfigError, DivergenceError, OdeFlowError, ShapeMismatch
from .utils.experiment import Experiment
from .visualization.flow import flow_to_color, plot_epe_vs_time

__all__ = ['main', 'build_parser']

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_DIVERGED = 2


def _add_common(parser: argparse.ArgumentParser):
    parser.add_argument('--config', type=Path, default=None, help='key=value file applied before --set')
    parser.add_argument('--set', dest='overrides', action='append', default=[], metavar='KEY=VALUE',
                        help='configuration override, repeatable')
    parser.add_argument('--out', type=Path, default=None, help='output directory')
    parser.add_argument('--seed', type=int, default=None)


def _add_checkpoint(parser: argparse.ArgumentParser):
    parser.add_argument('--checkpoint', type=Path, required=True, help='checkpoint file or training output directory')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='odeflow', description='Neural-ODE optical flow refinement at desk scale.')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('train', help='train on generated pairs')
    _add_common(p)
    p.add_argument('--iterations', type=int, default=None)

    p = sub.add_parser('eval', help='evaluate a checkpoint')
    _add_common(p)
    _add_checkpoint(p)
    p.add_argument('--manifest', type=Path, default=None, help='dataset manifest (default: generated test split)')
    p.add_argument('--refiner', choices=REFINERS, default=None)

    p = sub.add_parser('infer', help='flow for one image pair')
    _add_common(p)
    _add_checkpoint(p)
    p.add_argument('image1', type=Path)
    p.add_argument('image2', type=Path)
    p.add_argument('--refiner', choices=REFINERS, default=None)

    p = sub.add_parser('solve', help='integrate a built-in analytic problem')
    _add_common(p)
    p.add_argument('--problem', choices=sorted(ANALYTIC_PROBLEMS), default='exp_growth')
    p.add_argument('--method', choices=FIXED_METHODS + ADAPTIVE_METHODS, default=None)
    p.add_argument('--step-size', type=float, default=None)
    p.add_argument('--rtol', type=float, default=None)
    p.add_argument('--atol', type=float, default=None)
    p.add_argument('--max-steps', type=int, default=None)
    p.add_argument('--t1', type=float, default=None)
    p.add_argument('--times', type=float, nargs='+', default=None, help='evaluation times (default t0 t1)')

    p = sub.add_parser('ablate-t', help='EPE of the latent decoded at several integration times')
    _add_common(p)
    _add_checkpoint(p)
    p.add_argument('--times', type=float, nargs='+', default=None)

    p = sub.add_parser('gen-data', help='write a generated split as ppm / flo files with a manifest')
    _add_common(p)
    p.add_argument('--split', choices=sorted(SPLIT_OFFSETS), default='test')
    p.add_argument('--num', type=int, default=None)
    return parser


def collect_overrides(args) -> List[str]:
    overrides = read_config_file(args.config) if args.config is not None else []
    if args.seed is not None:
        overrides.append(f'seed={args.seed}')
    if getattr(args, 'iterations', None) is not None:
        overrides.append(f'train.iterations={args.iterations}')
    if getattr(args, 'method', None) is not None:
        overrides.append(f'solver={args.method}')
    for flag, key in (('step_size', 'step_size'), ('rtol', 'rtol'), ('atol', 'atol'), ('max_steps', 'max_steps')):
        value = getattr(args, flag, None)
        if value is not None:
            overrides.append(f'solver.{key}={value}')
    overrides.extend(args.overrides)
    return overrides


def model_overrides(overrides: List[str], cfg: DictConfig) -> Dict:
    """Model keys set explicitly on the command line, with their composed values."""
    keys = {}
    for override in overrides:
        key = override.split('=', 1)[0].lstrip('+~')
        if key.startswith('model.') and not key.startswith('model.target'):
            name = key[len('model.'):].split('.')[0]
            keys[name] = cfg.model[name]
    return keys


def _out_dir(args, cfg: DictConfig) -> Path:
    out = args.out if args.out is not None else Path(cfg.outputs_dir) / args.command
    out.mkdir(parents=True, exist_ok=True)
    echo_config(cfg, out)
    return out


def _experiment(args, cfg: DictConfig, overrides: List[str]) -> Experiment:
    solver = SolverConfig.from_cfg(cfg.solver)
    experiment = Experiment(args.checkpoint, model_overrides=model_overrides(overrides, cfg), solver=solver)
    logging.info(f'Loaded {experiment.checkpoint_path}')
    return experiment


def _test_loader(cfg: DictConfig, manifest: Optional[Path] = None) -> DataLoader:
    if manifest is not None:
        return DataLoader(ManifestDataset(manifest), batch_size=cfg.eval.batch_size, shuffle=False)
    datamodule = hydra.utils.instantiate(cfg.dataset, batch_size=cfg.eval.batch_size, seed=cfg.seed)
    datamodule.setup(stage='test')
    return datamodule.test_dataloader()


def cmd_train(args, cfg: DictConfig, overrides: List[str]) -> int:
    out = _out_dir(args, cfg)
    report = train(cfg, out)
    print(json.dumps({'epe': report['epe'], 'fl_all': report['fl_all'], 'out': str(out)}))
    return EXIT_OK


def cmd_eval(args, cfg: DictConfig, overrides: List[str]) -> int:
    out = _out_dir(args, cfg)
    experiment = _experiment(args, cfg, overrides)
    refiner = args.refiner if args.refiner is not None else experiment.refiner
    manifest = args.manifest if args.manifest is not None else cfg.eval.manifest
    pl.seed_everything(cfg.seed)
    loader = _test_loader(cfg, Path(manifest) if manifest is not None else None)
    report = evaluate(experiment.model, loader, refiner=refiner, config=OmegaConf.to_container(cfg, resolve=True))
    (out / 'eval_report.json').write_text(json.dumps(report, indent=2))
    logging.info(f'{refiner}: epe={report["epe"]:.4f} fl_all={report["fl_all"]:.2f}%')
    print(json.dumps({k: v for k, v in report.items() if k not in ('samples', 'config')}))
    return EXIT_OK


def cmd_infer(args, cfg: DictConfig, overrides: List[str]) -> int:
    out = _out_dir(args, cfg)
    experiment = _experiment(args, cfg, overrides)
    refiner = args.refiner if args.refiner is not None else experiment.refiner
    image1 = read_ppm(args.image1)
    image2 = read_ppm(args.image2)
    if image1.shape != image2.shape:
        raise ShapeMismatch(f'{args.image1} is {tuple(image1.shape[1:])}, {args.image2} is {tuple(image2.shape[1:])}')
    flow = infer(experiment.model, image1, image2, refiner=refiner)
    write_flo(flow, out / 'flow.flo')
    write_ppm(flow_to_color(flow), out / 'flow.ppm')
    logging.info(f'Wrote {out / "flow.flo"}')
    return EXIT_OK


def cmd_solve(args, cfg: DictConfig, overrides: List[str]) -> int:
    out = _out_dir(args, cfg)
    problem = get_problem(args.problem)
    config = SolverConfig.from_cfg(cfg.solver)
    t1 = problem.t1 if args.t1 is None else args.t1
    trajectory = odeint(problem.problem(t1=t1), config, args.times)
    errors = [problem.error(state, t) for t, state in zip(trajectory.times, trajectory.states)]
    result = {
        'problem': problem.name,
        'method': config.method,
        **trajectory.summary(),
        'states': [state.tolist() for state in trajectory.states],
        'errors': errors,
        'final_error': errors[-1],
    }
    (out / 'trajectory.json').write_text(json.dumps(result, indent=2))
    print(json.dumps(result))
    return EXIT_OK


def cmd_ablate_t(args, cfg: DictConfig, overrides: List[str]) -> int:
    times = list(args.times) if args.times is not None else list(cfg.eval.times)
    if sorted(times) != times:
        raise ConfigError(f'times must be sorted, got {times}')
    out = _out_dir(args, cfg)
    experiment = _experiment(args, cfg, overrides)
    pl.seed_everything(cfg.seed)
    table, strip = ablate_time(experiment.model, _test_loader(cfg), times)
    table.to_csv(out / 'ablate_t.csv', index=False)
    (out / 'ablate_t.json').write_text(table.to_json(orient='records', indent=2))
    write_ppm(strip, out / 'strip.ppm')
    plot_epe_vs_time(table, out / 'epe_vs_time.png')
    logging.info('\n' + table.to_string(index=False))
    return EXIT_OK


def cmd_gen_data(args, cfg: DictConfig, overrides: List[str]) -> int:
    out = _out_dir(args, cfg)
    datamodule = hydra.utils.instantiate(cfg.dataset, batch_size=1, seed=cfg.seed,
                                         train_size=args.num if args.num is not None else 0)
    dataset = datamodule.split(args.split)
    if args.num is not None:
        dataset.length = args.num
    export_dataset(dataset, out)
    return EXIT_OK


COMMANDS = {
    'train': cmd_train,
    'eval': cmd_eval,
    'infer': cmd_infer,
    'solve': cmd_solve,
    'ablate-t': cmd_ablate_t,
    'gen-data': cmd_gen_data,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging('INFO')
    try:
        overrides = collect_overrides(args)
        cfg = compose_config(overrides)
        logging.getLogger().setLevel(cfg.log_level)
        logging.debug(OmegaConf.to_yaml(cfg))
        return COMMANDS[args.command](args, cfg, overrides)
    except DivergenceError as e:
        logging.error(f'training diverged: {e}')
        return EXIT_DIVERGED
    except (OdeFlowError, HydraException, FileNotFoundError, ValueError) as e:
        logging.error(str(e))
        return EXIT_ERROR


if __name__ == '__main__':
    sys.exit(main())
