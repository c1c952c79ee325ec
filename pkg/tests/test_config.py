import pytest

from defcode.config import (
    ChannelParams,
    CodeConfig,
    RunConfig,
    TrainConfig,
    format_config,
    parse_config_text,
)
from defcode.errors import ConfigurationError, InputError


def test_table_defaults():
    c, t = CodeConfig(), TrainConfig()
    assert (c.L_info, c.pad_bits, c.Q, c.P, c.H0) == (49, 1, 2, 2, 50)
    assert c.deltas == (1, 2, 2) and c.gammas == (1, 1, 1)
    assert (t.epochs, t.batches_per_epoch, t.batch_size) == (2000, 10, 2000)
    assert t.lr_initial == 0.02 and t.lr_drop_factor == 10 and t.lr_drop_after_batches == 1000
    assert t.clip_norm == 1 and t.rollback_factor == 10
    assert (t.w_train_start_epoch, t.a_train_start_epoch) == (100, 200)
    assert len(t.seeds) == 3 and t.total_batches == 20_000
    assert ChannelParams().noiseless_feedback


@pytest.mark.parametrize("kw", [
    dict(Q=3), dict(deltas=(1, 0, 2)), dict(deltas=(1, 2)), dict(gammas=(0, -1, 0)),
    dict(encoder_cell="cnn"), dict(L_info=48, Q=4), dict(H0=0), dict(norm_mode="layer"),
])
def test_invalid_code_config(kw):
    with pytest.raises(ConfigurationError):
        CodeConfig(**kw)


def test_delta0_may_be_zero():
    assert CodeConfig(deltas=(0, 1, 1)).encoder_input_size == 4


def test_invalid_train_config():
    with pytest.raises(ConfigurationError):
        TrainConfig(batch_size=0)


def test_parse_round_trip():
    rc = parse_config_text("""
        # desk run
        L_info = 24
        H0 = 25
        gammas = 0,0,0
        batch_size = 250
        feedback_snr_db = noiseless
        train_snr_db = 1.5
    """)
    assert rc.code.K == 25 and rc.code.gammas == (0, 0, 0)
    assert rc.train.batch_size == 250 and rc.train.train_snr_db == 1.5
    assert rc.channel.feedback_snr_db is None
    assert parse_config_text(format_config(rc)) == rc


def test_parse_numeric_forms():
    rc = parse_config_text("calib_codewords = 1e5\nfeedback_snr_db = 20")
    assert rc.train.calib_codewords == 100_000
    assert rc.channel.feedback_snr_db == 20.0


@pytest.mark.parametrize("text", ["unknown_key = 1", "H0 : 4", "H0 = four", "Q = 3"])
def test_parse_errors(text):
    with pytest.raises(InputError):
        parse_config_text(text)


def test_default_run_config_formats():
    text = format_config(RunConfig())
    assert "deltas = 1,2,2" in text and "feedback_snr_db = noiseless" in text
