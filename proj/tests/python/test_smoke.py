import pytest

import mctsnmt as m


@pytest.fixture(scope="module")
def task():
    spec = m.SyntheticTaskSpec()
    return spec, m.gen_synthetic(spec, 300, 11), m.gen_synthetic(spec, 50, 12)


def test_bleu_values():
    assert m.sentence_bleu([4, 5, 6, 7], [4, 5, 9, 7]).value == pytest.approx(0.4518, abs=1e-4)
    assert m.sentence_bleu([], [4, 5]).value == 0.0
    assert m.corpus_bleu([[4, 5, 6, 7]], [[4, 5, 6, 7]]).value == pytest.approx(1.0)
    with pytest.raises(m.Error):
        m.sentence_bleu([4, m.EOS], [4])


def test_synthetic_task_and_oracle(task):
    spec, train, test = task
    pair = train[0]
    assert pair.ref == m.SyntheticTask(spec).reference(pair.src)
    assert pair.ref[-1] == m.EOS
    oracle = m.OracleModel(spec)
    assert not oracle.trainable()
    out = m.greedy_decode(oracle, pair.src, m.default_max_len(len(pair.src)))
    assert out == pair.ref
    assert m.evaluate_greedy(oracle, test).value == pytest.approx(1.0)


def test_fresh_model_is_uniform():
    model = m.TabularModel(10)
    ev = model.evaluate(m.initial_state([4, 5]))
    assert ev.priors == pytest.approx([0.1] * 10)
    assert ev.value == pytest.approx(0.5)


def test_search_trace(task):
    spec, train, _ = task
    params = m.SearchParams()
    params.num_simulations = 16
    result = m.translate_mcts(train[0].src, train[0].ref, m.OracleModel(spec), params)
    assert result.translation == train[0].ref
    for step in result.trace:
        assert sum(p for _, p in step.probs) == pytest.approx(step.retained_mass, abs=1e-6)
    assert result.format_trace()


def test_concurrent_matches_sequential(task):
    _, train, _ = task
    model = m.TabularModel(44)
    model.randomize_logits(1.0, 3)
    params = m.SearchParams()
    params.num_simulations = 20
    pairs = train[:12]
    conc = m.run_concurrent_searches(model, pairs, params, sample=True, seed=9,
                                     workers=4, max_batch=8)
    for i, pair in enumerate(pairs):
        p = m.SearchParams()
        p.num_simulations = 20
        p.rng_seed = m.derive_seed(9, i)
        seq = m.translate_mcts(pair.src, pair.ref, model, p, sample=True)
        assert conc[i].translation == seq.translation
        assert [s.probs for s in conc[i].trace] == [s.probs for s in seq.trace]


def test_training_loops_run(task):
    _, train, test = task
    model = m.TabularModel(44)
    m.pretrain_policy(model, train, 1, 0.05)
    before = model.parameters()
    params = m.SearchParams()
    params.num_simulations = 10
    tp = m.TrainParams()
    tp.learning_rate = 0.3
    hist = m.train_mcts(model, train, test, params, tp, rounds=2,
                        sentences_per_round=32, draws=2, draw_size=32)
    assert [h["sentences"] for h in hist] == [32, 64]
    assert model.parameters() != before
    for fn in (m.train_reinforce, m.train_actor_critic):
        h = fn(model, train, test, learning_rate=0.1, batch_sentences=16, total_sentences=32)
        assert h and 0.0 <= h[-1]["valid_bleu"] <= 1.0


def test_checkpoint_round_trip(tmp_path):
    model = m.TabularModel(12)
    model.randomize_logits(0.5, 1)
    path = str(tmp_path / "model.ckpt")
    m.save_model(model, path)
    loaded = m.load_model(path)
    state = m.initial_state([4, 6])
    assert loaded.evaluate(state).priors == model.evaluate(state).priors


def test_cli(tmp_path):
    data = str(tmp_path / "d.tsv")
    code, out, err = m.run_cli(["gen-data", "--n", "5", "--seed", "1", "--out", data])
    assert code == 0, err
    assert len(m.load_dataset(data)) == 5
    code, _, err = m.run_cli(["no-such-command"])
    assert code != 0 and err
