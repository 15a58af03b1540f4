"""
Training on a small synthetic corpus
====================================

Generates a corpus with entity-pair overlap, single-entity overlap and
nested entities, trains until dev F1 passes 0.75 (around 50 epochs), then
scores the dev split overall and per overlap pattern.  Three to five minutes
on one core.
"""
import numpy as np

from tablefill.data import SynthConfig, Vocab, generate_synthetic, split_dataset
from tablefill.evaluation import breakdown, micro_prf, predict
from tablefill.model import ModelConfig, TableFillingModel
from tablefill.training import TrainConfig, train

EPOCHS = 80

corpus = generate_synthetic(SynthConfig(seed=7))
train_ds, dev_ds = split_dataset(corpus, [500, 100], ["train", "dev"])
vocab = Vocab.build([train_ds])
print(len(vocab), "token types;", "example:", " ".join(train_ds[0].sentence.tokens))

model = TableFillingModel(ModelConfig(num_relations=len(corpus.schema), vocab_size=len(vocab), N=2), seed=0)
print(model.num_parameters(), "parameters")

state = train(model, train_ds, dev_ds, vocab, TrainConfig(epochs=EPOCHS, target_dev_f1=0.75),
              on_epoch=lambda row: print(f"epoch {row['epoch']:3d}  loss {row['loss']:.4f}  dev F1 {row['dev_f1']:.3f}"))

# score with the best dev parameters
model.load_state_dict(state.best_params)
preds = predict(model, dev_ds, vocab)
golds = [ex.triples for ex in dev_ds]
for mode in ("exact", "partial"):
    m = micro_prf(preds, golds, mode)
    print(f"{mode:>7}: P {m.precision:.3f}  R {m.recall:.3f}  F1 {m.f1:.3f}")
for name, m in breakdown(preds, golds)["category"].items():
    print(f"{name:>7}: F1 {m.f1:.3f} over {m.gold} gold triples")

# the table for the first dev sentence, relation by relation
table = model.predict_tables(np.array([vocab.encode(dev_ds[0].sentence.tokens)]))[0]
print("filled cells per relation:", (table.grid != 0).sum(axis=(1, 2)))
