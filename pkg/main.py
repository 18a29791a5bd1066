import logging
import sys
from multiprocessing import set_start_method
import fire
from keys import Keys
from modules import setup_logging, split_list
from classes.errors import FieldSelectionError, exit_code_for
from classes.manager import RunManager
from classes.synthetic import SyntheticSpec
from classes.train_config import TrainConfig

logger = logging.getLogger("aefs")


def load_config(config=None, **overrides) -> TrainConfig:
    """Config file first, then every flag that was given"""
    base = TrainConfig.from_file(config) if config else TrainConfig()
    return base.with_overrides(**overrides)


def _switches(no_eal: bool, no_pal: bool, no_topk_reweight: bool) -> dict:
    switches = {}
    if no_eal:
        switches["enable_eal"] = False
    if no_pal:
        switches["enable_pal"] = False
    if no_topk_reweight:
        switches["enable_topk_reweight"] = False
    return switches


class Commands():
    """Adaptive early feature selection for CTR models"""

    def synth(self, out: str = Keys.SYNTH_DIR, fields: int = Keys.SYNTH_FIELDS,
              informative: int = Keys.SYNTH_INFORMATIVE, vocab: int = Keys.SYNTH_VOCAB,
              records: int = Keys.SYNTH_RECORDS, seed: int = Keys.SEED,
              weight_scale: float = Keys.SYNTH_WEIGHT_SCALE):
        """Writes planted-signal records, schema, informative-field list and planted-model AUC"""
        spec = SyntheticSpec(n_fields=fields, n_informative=informative, vocab_sizes=vocab,
                             n_records=records, seed=seed, weight_scale=weight_scale)
        return RunManager().synth(out, spec)

    def prepare(self, config=None, data=None, data_format=None, split_seed=None, min_freq=None, out=None):
        """Builds the vocabulary from the train split and saves it"""
        cfg = load_config(config, data=data, data_format=data_format, split_seed=split_seed, min_freq=min_freq)
        return RunManager().prepare(cfg, out)

    def train(self, config=None, seed=None, method=None, mode=None, r=None, d1=None, d2=None,
              backbone_main=None, backbone_aux=None, no_eal=False, no_pal=False, no_topk_reweight=False,
              pretrain_epochs=None, out=None, force=False, data=None, data_format=None, max_epochs=None,
              batch_size=None, lr=None, split_seed=None, min_freq=None, hidden_dims=None, cross_layers=None):
        """prepare -> train -> evaluate; prints test metrics and ΔPaE"""
        cfg = load_config(config, seed=seed, method=method, mode=mode, r=r, d1=d1, d2=d2,
                          backbone_main=backbone_main, backbone_aux=backbone_aux, pretrain_epochs=pretrain_epochs,
                          out=out, force=force or None, data=data, data_format=data_format, max_epochs=max_epochs,
                          batch_size=batch_size, lr=lr, split_seed=split_seed, min_freq=min_freq,
                          hidden_dims=hidden_dims, cross_layers=cross_layers,
                          **_switches(no_eal, no_pal, no_topk_reweight))
        run_dir, _ = RunManager().train(cfg)
        return run_dir

    def evaluate(self, run, dump=False):
        """Re-evaluates a run directory's checkpoint on the test split"""
        RunManager().evaluate(run, dump=dump)

    def compare(self, config=None, methods="none,adafs,aefs", seeds="1,2,3,4,5", workers=1, out=None,
                data=None, data_format=None, max_epochs=None, batch_size=None, lr=None, split_seed=None,
                min_freq=None, hidden_dims=None, cross_layers=None, r=None, d1=None, d2=None, mode=None,
                backbone_main=None, backbone_aux=None, pretrain_epochs=None, force=False):
        """Trains every (method, seed) cell and writes the comparison table and Welch p-values"""
        cfg = load_config(config, out=out, force=force or None, data=data, data_format=data_format,
                          max_epochs=max_epochs, batch_size=batch_size, lr=lr, split_seed=split_seed,
                          min_freq=min_freq, hidden_dims=hidden_dims, cross_layers=cross_layers, r=r, d1=d1,
                          d2=d2, mode=mode, backbone_main=backbone_main, backbone_aux=backbone_aux,
                          pretrain_epochs=pretrain_epochs)
        seed_list = [int(s) for s in split_list(seeds)]
        workers = Keys.NUM_PROCESSES if Keys.MULTI_PROCESSING and workers == 1 else workers
        return RunManager(workers=workers).compare(cfg, split_list(methods), seed_list)

    def params(self, vocab, d1=Keys.D_MAIN, d2=Keys.D_AUX, r=Keys.KEEP_RATIO, sweep=None):
        """Full, auxiliary and expected activated embedding parameters, ΔPaE and ΔEL"""
        RunManager().params(vocab, d1=d1, d2=d2, r=r, sweep=[int(s) for s in split_list(sweep)])


def main(argv=None, log_level: str = "INFO") -> int:
    setup_logging(log_level)
    try:
        fire.Fire(Commands, command=argv, name="aefs")
    except FieldSelectionError as e:
        logger.error("%s: %s", type(e).__name__, e)
        return exit_code_for(e)
    except SystemExit as e:
        # fire usage errors
        return e.code if isinstance(e.code, int) else 1
    return 0


if __name__ == "__main__":
    try:
        set_start_method("spawn")
    except RuntimeError:
        print("context already set")
    sys.exit(main())
