"""Soft actor-critic core shared by behavior training, the adversarial policy,
and the meta-policy (which adds a behavior-cloning term).

The loss computations are module-level functions of explicit networks and
batches so they can be checked against finite differences.
"""

import math

import numpy as np
import torch
import torch.nn.functional as F

from .errors import DivergenceError
from .networks import SquashedGaussianActor, TwinCritic


def critic_loss(actor, critic, target_critic, log_alpha, batch, gamma, noise=None):
    """MSE of both critics against the entropy-regularized bootstrap target."""
    obs, action, reward, next_obs, done = (
        batch["obs"], batch["action"], batch["reward"], batch["next_obs"], batch["done"])
    with torch.no_grad():
        next_action, next_logp = actor.sample(next_obs, noise=noise)
        tq1, tq2 = target_critic(next_obs, next_action)
        alpha = log_alpha.exp()
        target = reward + gamma * (1.0 - done) * (torch.min(tq1, tq2) - alpha * next_logp)
    q1, q2 = critic(obs, action)
    return F.mse_loss(q1, target) + F.mse_loss(q2, target)


def actor_loss(actor, critic, log_alpha, obs, noise=None,
               bc_actions=None, bc_weight=0.0, q_scale=None):
    """Entropy-regularized policy loss; optionally adds a behavior-cloning
    penalty with the Q term normalized by the batch-mean |Q|.

    The normalizer is a stop-gradient quantity; pass `q_scale` to freeze it
    explicitly (gradient checks must differentiate the same function).
    """
    action, logp = actor.sample(obs, noise=noise)
    q1, q2 = critic(obs, action)
    q = torch.min(q1, q2)
    alpha = log_alpha.exp().detach()
    sac_term = (alpha * logp - q).mean()
    if bc_actions is None:
        return sac_term
    if q_scale is None:
        q_scale = q.abs().mean().detach().clamp_min(1e-8)
    bc_term = F.mse_loss(actor.mean_action(obs), bc_actions)
    return sac_term / q_scale + bc_weight * bc_term


def temperature_loss(log_alpha, logp, target_entropy):
    return -(log_alpha * (logp + target_entropy).detach()).mean()


class SACLearner:
    """Twin-critic SAC with target networks and learned entropy temperature."""

    def __init__(self, obs_dim, action_dim, hidden=(256, 256), lr=3e-4,
                 gamma=0.99, tau=0.005, init_alpha=0.2, bc_weight=0.0):
        self.actor = SquashedGaussianActor(obs_dim, action_dim, hidden)
        self.critic = TwinCritic(obs_dim + action_dim, hidden)
        self.target_critic = TwinCritic(obs_dim + action_dim, hidden)
        self.target_critic.load_state_dict(self.critic.state_dict())
        for p in self.target_critic.parameters():
            p.requires_grad_(False)
        self.log_alpha = torch.tensor(math.log(init_alpha), requires_grad=True)
        self.actor_opt = torch.optim.Adam(self.actor.parameters(), lr=lr)
        self.critic_opt = torch.optim.Adam(self.critic.parameters(), lr=lr)
        self.alpha_opt = torch.optim.Adam([self.log_alpha], lr=lr)
        self.gamma = gamma
        self.tau = tau
        self.target_entropy = -float(action_dim)
        self.bc_weight = bc_weight

    def act(self, obs, deterministic=False):
        obs_t = torch.as_tensor(np.asarray(obs, dtype=np.float32))
        squeeze = obs_t.ndim == 1
        if squeeze:
            obs_t = obs_t.unsqueeze(0)
        with torch.no_grad():
            if deterministic:
                action = self.actor.mean_action(obs_t)
            else:
                action, _ = self.actor.sample(obs_t)
        action = action.numpy()
        return action[0] if squeeze else action

    def update(self, batch, bc_actions=None):
        """One round of critic, actor, and temperature updates."""
        c_loss = critic_loss(self.actor, self.critic, self.target_critic,
                             self.log_alpha, batch, self.gamma)
        self.critic_opt.zero_grad()
        c_loss.backward()
        self.critic_opt.step()

        for p in self.critic.parameters():
            p.requires_grad_(False)
        a_loss = actor_loss(self.actor, self.critic, self.log_alpha, batch["obs"],
                            bc_actions=bc_actions, bc_weight=self.bc_weight)
        self.actor_opt.zero_grad()
        a_loss.backward()
        self.actor_opt.step()
        for p in self.critic.parameters():
            p.requires_grad_(True)

        with torch.no_grad():
            _, logp = self.actor.sample(batch["obs"])
        t_loss = temperature_loss(self.log_alpha, logp, self.target_entropy)
        self.alpha_opt.zero_grad()
        t_loss.backward()
        self.alpha_opt.step()

        if not (torch.isfinite(c_loss) and torch.isfinite(a_loss)):
            raise DivergenceError(
                f"non-finite SAC losses (critic={c_loss.item()}, actor={a_loss.item()})")

        with torch.no_grad():
            for p, tp in zip(self.critic.parameters(), self.target_critic.parameters()):
                tp.mul_(1.0 - self.tau).add_(self.tau * p)

        return {"critic_loss": c_loss.item(), "actor_loss": a_loss.item(),
                "alpha": self.log_alpha.exp().item()}

    def state_dict(self):
        return {
            "actor": self.actor.state_dict(),
            "critic": self.critic.state_dict(),
            "target_critic": self.target_critic.state_dict(),
            "log_alpha": self.log_alpha.detach().clone(),
        }

    def load_state_dict(self, state):
        self.actor.load_state_dict(state["actor"])
        self.critic.load_state_dict(state["critic"])
        self.target_critic.load_state_dict(state["target_critic"])
        with torch.no_grad():
            self.log_alpha.copy_(state["log_alpha"])
