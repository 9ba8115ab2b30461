"""Word-level LM fusion for a letter-emitting search.

A small ARPA bigram model over three words drives both fusion scorers: the
multi-level scorer (char-LM scores swapped for word probabilities at each
boundary) and the look-ahead scorer (word mass spread per character over a
prefix tree). Their per-step scores differ; their word totals are both
exactly the word-LM log-probabilities.
"""

import tempfile

import numpy as np

from seqdecode import (
    LookAheadLMScorer,
    MultiLevelLMScorer,
    TableScorer,
    Vocabulary,
    WordTrie,
    load_arpa,
    ngram_score,
    sentence_logprob,
)

ARPA = """\
\\data\\
ngram 1=6
ngram 2=2

\\1-grams:
-1.3 <unk>
-1.3 <s> -0.22
-0.9 </s>
-0.55 cab ; p=0.28
-0.65 cad
-0.75 ad

\\2-grams:
-0.3 <s> cab
-0.4 cab ad

\\end\\
"""
# strip the inline annotation: plain ARPA has none
ARPA = ARPA.replace(" ; p=0.28", "")

with tempfile.NamedTemporaryFile("w", suffix=".arpa", delete=False) as f:
    f.write(ARPA)
    arpa_path = f.name

word_lm = load_arpa(arpa_path)
words = ["cab", "cad", "ad"]

vocab = Vocabulary(
    tokens=("<blank>", "a", "b", "c", "d", "<space>", "<eos>", "<sos>"),
    blank_id=0, sos_id=7, eos_id=6,
)
rng = np.random.default_rng(11)
char_rows = {(): np.log(rng.dirichlet(np.ones(vocab.size)))}
char_lm = TableScorer(0, vocab.size, char_rows)

multilevel = MultiLevelLMScorer(char_lm, word_lm, vocab)
lookahead = LookAheadLMScorer(WordTrie(words, word_lm), word_lm, vocab)


def trace(scorer, text_tokens):
    state = scorer.init_state(None)
    prefix = (vocab.sos_id,)
    steps = []
    for tok in text_tokens:
        vec, scored = scorer.score(prefix, state, None)
        steps.append(float(vec[tok]))
        state = scorer.select_state(scored, tok)
        prefix = prefix + (tok,)
    return steps


sentence = ["cab", "ad"]
token_ids = []
for i, word in enumerate(sentence):
    token_ids += [vocab.tokens.index(ch) for ch in word]
    token_ids.append(vocab.tokens.index("<space>") if i + 1 < len(sentence) else vocab.eos_id)

names = [vocab.tokens[t] for t in token_ids]
ml_steps = trace(multilevel, token_ids)
la_steps = trace(lookahead, token_ids)

print(f"{'token':8s} {'multi-level':>12s} {'look-ahead':>12s}")
for name, ml, la in zip(names, ml_steps, la_steps):
    print(f"{name:8s} {ml:12.4f} {la:12.4f}")
print(f"{'total':8s} {sum(ml_steps):12.4f} {sum(la_steps):12.4f}")

direct = sentence_logprob(word_lm, sentence)
print(f"\nword-LM sentence log-probability: {direct:.4f}")
assert abs(sum(ml_steps) - direct) < 1e-6
assert abs(sum(la_steps) - direct) < 1e-6

print("\nper-word telescoping for the look-ahead scorer:")
ctx = ("<s>",)
pos = 0
for word in sentence[:-1]:  # the last word closes at eos, which folds in </s>
    span = la_steps[pos : pos + len(word) + 1]
    expected = ngram_score(word_lm, ctx, word)
    print(f"  {word}: increments sum to {sum(span):.6f}, ln P = {expected:.6f}")
    assert abs(sum(span) - expected) < 1e-9
    pos += len(word) + 1
    ctx = ctx + (word,)
last = sentence[-1]
span = la_steps[pos:]
expected = ngram_score(word_lm, ctx, last) + ngram_score(word_lm, ctx + (last,), "</s>")
print(f"  {last} + </s>: increments sum to {sum(span):.6f}, ln P = {expected:.6f}")
assert abs(sum(span) - expected) < 1e-9
