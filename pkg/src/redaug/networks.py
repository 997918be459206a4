"""MLP building blocks: squashed-Gaussian actors and twin Q critics."""

import torch
import torch.nn as nn
import torch.nn.functional as F

LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0


def mlp(sizes, activation=nn.ReLU):
    layers = []
    for i in range(len(sizes) - 1):
        layers.append(nn.Linear(sizes[i], sizes[i + 1]))
        if i < len(sizes) - 2:
            layers.append(activation())
    return nn.Sequential(*layers)


class SquashedGaussianActor(nn.Module):
    """Gaussian policy squashed through tanh; actions land in [-1, 1]^dim."""

    def __init__(self, obs_dim, action_dim, hidden=(256, 256)):
        super().__init__()
        self.body = mlp([obs_dim, *hidden, 2 * action_dim])
        self.action_dim = action_dim

    def forward(self, obs):
        out = self.body(obs)
        mu, log_std = out.chunk(2, dim=-1)
        log_std = torch.clamp(log_std, LOG_STD_MIN, LOG_STD_MAX)
        return mu, log_std

    def sample(self, obs, noise=None):
        """Reparameterized sample with tanh log-prob correction.

        `noise` fixes the standard-normal draw, making the sample a
        deterministic function of the parameters (used by gradient checks).
        """
        mu, log_std = self(obs)
        std = log_std.exp()
        if noise is None:
            noise = torch.randn_like(mu)
        pre_tanh = mu + std * noise
        action = torch.tanh(pre_tanh)
        log_prob = (-0.5 * ((pre_tanh - mu) / std) ** 2
                    - log_std - 0.5 * torch.log(torch.tensor(2.0 * torch.pi, dtype=obs.dtype)))
        # change of variables for the tanh squash
        log_prob = log_prob - 2.0 * (torch.log(torch.tensor(2.0, dtype=obs.dtype))
                                     - pre_tanh - F.softplus(-2.0 * pre_tanh))
        return action, log_prob.sum(-1)

    def mean_action(self, obs):
        mu, _ = self(obs)
        return torch.tanh(mu)


class TwinCritic(nn.Module):
    def __init__(self, input_dim, hidden=(256, 256)):
        super().__init__()
        self.q1 = mlp([input_dim, *hidden, 1])
        self.q2 = mlp([input_dim, *hidden, 1])

    def forward(self, obs, action):
        x = torch.cat([obs, action], dim=-1)
        return self.q1(x).squeeze(-1), self.q2(x).squeeze(-1)
