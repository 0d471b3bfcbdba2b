"""
Training a small classifier and checking its gradients
======================================================

The attacks only need black-box probabilities, but the enhancing-record
search differentiates the model's output with respect to its *input*. This
script trains a net on the toy blobs and compares both analytic gradients
against central differences.
"""

# %%
import numpy as np

from gmia import ModelSpec, TrainingConfig, generate_toy, predict, train
from gmia.model import accuracy, input_gradient, objective, param_gradients

toy = generate_toy(seed=0)
spec = ModelSpec((toy.n_features, 8, toy.class_count))
model = train(toy, spec, TrainingConfig(epochs=100, batch_size=32, learning_rate=0.1, seed=1))
print("training accuracy:", accuracy(model, toy))

# %%
# Parameter gradient of the regularized objective on a small batch.
batch = (toy.X[:16], toy.y[:16])
theta = model.flat()
analytic = param_gradients(model, batch, l2=0.01).flat()
step = 1e-5
numeric = np.array([
    (objective(model.with_flat(theta + e), batch, 0.01) - objective(model.with_flat(theta - e), batch, 0.01)) / (2 * step)
    for e in np.eye(len(theta))[:10] * step
])
print("max parameter-gradient gap:", np.abs(analytic[:10] - numeric).max())

# %%
# Input gradient of a weighted sum of the class probabilities.
x = toy.X[0]
weights = np.array([1.0, -1.0])
numeric = np.array([(predict(model, x + e) @ weights - predict(model, x - e) @ weights) / (2 * step)
                    for e in np.eye(2) * step])
print("input gradient:", input_gradient(model, x, weights), "vs", numeric)
