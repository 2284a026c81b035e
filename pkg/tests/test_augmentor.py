from dataclasses import dataclass
from datetime import datetime, timedelta, timezone

import pytest
from hypothesis import given
from hypothesis import strategies as st

from buglistener.augmentor import (
    AugmentConfig,
    augment_dialog,
    augment_sentences_eda,
    balance_bri,
    eda,
    derived_rng,
    load_thesaurus,
    mutate_utterance,
    short_pool,
)
from buglistener.brs_model import Sentence
from buglistener.corpus import Dialog, Utterance
from buglistener.errors import ConfigError, ValidationError

T0 = datetime(2021, 1, 1, tzinfo=timezone.utc)
SYN = load_thesaurus()
WORDS = sorted(SYN)[:40]


def utt(uid, text, minute=0, author="ann"):
    return Utterance(uid, T0 + timedelta(minutes=minute), author, text, text)


def dialog(did, texts, label="BR"):
    utts = tuple(utt(f"{did}.{k}", t, k, "ann" if k % 2 == 0 else "bob") for k, t in enumerate(texts))
    links = tuple((f"{did}.{k}", f"{did}.{k - 1}") for k in range(1, len(texts)))
    return Dialog(utts, links, label=label, id=did, project="p")


POOL = [utt("p0", "ok"), utt("p1", "thanks a lot"), utt("p2", "got it now")]
LONG = " ".join(WORDS[:10])


def test_thesaurus_is_single_token():
    assert SYN and all(" " not in s for opts in SYN.values() for s in opts)


def test_config_validation():
    with pytest.raises(ConfigError):
        AugmentConfig(theta=0)
    with pytest.raises(ConfigError):
        AugmentConfig(n_mutants=-1)


def test_short_utterance_replaced_from_pool():
    cfg = AugmentConfig()
    out = mutate_utterance(utt("x", "the app crash"), cfg, POOL)
    assert out.text in {p.text for p in POOL}
    assert len(out.tokens) < cfg.theta
    assert out.id == "x" and out.timestamp == T0


def test_long_utterance_synonym_replaced():
    out = mutate_utterance(utt("x", LONG), AugmentConfig(), POOL)
    assert len(out.tokens) == 10
    assert out.tokens != LONG.split()


@given(st.integers(0, 1000))
def test_placeholders_never_replaced(seed):
    text = " ".join(["[URL]"] * 3 + WORDS[:8])
    out = mutate_utterance(utt("x", text), AugmentConfig(rng_seed=seed, sr_rate=1.0), POOL)
    assert out.tokens[:3] == ["[URL]"] * 3
    assert len(out.tokens) == len(text.split())


def test_empty_pool_is_config_error():
    with pytest.raises(ConfigError):
        mutate_utterance(utt("x", "hi"), AugmentConfig(), [])


def test_short_pool_respects_theta():
    d = dialog("d", ["ok", LONG, "thanks a lot", "ok"])
    pool = short_pool([d], 5)
    assert [u.text for u in pool] == ["ok", "thanks a lot"]


def test_zero_mutants():
    assert augment_dialog(dialog("d", ["ok", LONG]), AugmentConfig(n_mutants=0), POOL) == []


def test_mutants_preserve_structure():
    d = dialog("d", ["hi all", LONG, "which one", LONG])
    ms = augment_dialog(d, AugmentConfig(), POOL, n=3)
    assert len(ms) == 3
    for m in ms:
        assert len(m) == 4
        assert [u.role for u in m.utterances] == [u.role for u in d.utterances]
        assert m.reply_links == d.reply_links
        assert m.label == d.label and m.augmented_from == "d"
    assert len({m.id for m in ms}) == 3


def test_mutants_reproducible():
    d = dialog("d", ["hi all", LONG, "which one"])
    a = augment_dialog(d, AugmentConfig(rng_seed=3), POOL, n=2)
    b = augment_dialog(d, AugmentConfig(rng_seed=3), POOL, n=2)
    assert a == b
    assert repr([u.text for m in a for u in m.utterances]) == repr([u.text for m in b for u in m.utterances])


def test_balance_angular_example():
    br = [dialog(f"b{k}", ["oops", LONG], "BR") for k in range(86)]
    nbr = [dialog(f"n{k}", ["hey", LONG], "NBR") for k in range(179)]
    out = balance_bri({"BR": br, "NBR": nbr}, AugmentConfig(), POOL, nbr_multiplier=2)
    assert len(out["NBR"]) == 358 and len(out["BR"]) == 358
    assert out["BR"][:86] == br and out["NBR"][:179] == nbr
    assert all(d.label == "BR" for d in out["BR"]) and all(d.label == "NBR" for d in out["NBR"])


def test_balance_already_balanced():
    br = [dialog(f"b{k}", ["oops", LONG], "BR") for k in range(5)]
    nbr = [dialog(f"n{k}", ["hey", LONG], "NBR") for k in range(5)]
    out = balance_bri({"BR": br, "NBR": nbr}, AugmentConfig(), POOL, nbr_multiplier=1)
    assert out == {"BR": br, "NBR": nbr}


def test_balance_default_multiplier_is_eight():
    br = [dialog("b", ["oops", LONG], "BR")]
    nbr = [dialog("n", ["hey", LONG], "NBR")]
    out = balance_bri({"BR": br, "NBR": nbr}, AugmentConfig(), POOL)
    assert len(out["NBR"]) == len(out["BR"]) == 8


def test_balance_requires_both_classes():
    with pytest.raises(ValidationError):
        balance_bri({"BR": [], "NBR": [dialog("n", ["hey"], "NBR")]}, AugmentConfig(), POOL)


def sentences(label, n):
    return [Sentence(id=f"{label}{k}", text=f"{WORDS[k % 40]} {WORDS[(k + 3) % 40]} word{k}", label=label)
            for k in range(n)]


def test_eda_balances_to_largest():
    out = augment_sentences_eda({"OB": sentences("OB", 10), "EB": sentences("EB", 4), "SR": sentences("SR", 7)},
                                AugmentConfig())
    assert [len(out[c]) for c in ("OB", "EB", "SR")] == [10, 10, 10]
    extra = out["EB"][4:]
    assert all(s.augmented_from in {f"EB{k}" for k in range(4)} for s in extra)
    assert all(s.label == "EB" for s in extra)


def test_eda_unchanged_when_equal():
    data = {c: sentences(c, 3) for c in ("OB", "EB", "SR")}
    assert augment_sentences_eda(data, AugmentConfig()) == data


def test_eda_reproducible_and_other_passes_through():
    data = {"OB": sentences("OB", 6), "EB": sentences("EB", 2), "SR": sentences("SR", 3),
            "OTHER": sentences("OTHER", 1)}
    a = augment_sentences_eda(data, AugmentConfig(rng_seed=9))
    assert a == augment_sentences_eda(data, AugmentConfig(rng_seed=9))
    assert a["OTHER"] == data["OTHER"]


def test_eda_empty_class_is_error():
    with pytest.raises(ValidationError):
        augment_sentences_eda({"OB": sentences("OB", 2), "EB": [], "SR": sentences("SR", 1)}, AugmentConfig())


def test_eda_uses_all_four_operations():
    text = " ".join(WORDS[:10])
    outs = {eda(text, SYN, derived_rng(0, k)) for k in range(200)}
    lengths = {len(o.split()) for o in outs}
    # insertion grows, deletion shrinks, swap and replacement keep the length
    assert min(lengths) < 10 < max(lengths) and 10 in lengths
    assert any(sorted(o.split()) == sorted(text.split()) and o != text for o in outs)
