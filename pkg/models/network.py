# models/network.py

"""
Full forward and backward pass.

The decoder runs twice per scene: once with the plain group queries and once
with the individual queries anchored on the scene tokens. Group heads read
the first pass, individual heads the second.
"""

from dataclasses import dataclass

import numpy as np

from core import GroupOutputs, IndividualOutputs
from errors import InputError
from losses import LossBreakdown
from models.decoder import DecoderCache, anchor_reference, anchor_tokens, decoder_backward, decoder_forward
from models.heads import HeadsCache, heads_backward, heads_forward
from models.params import GradientBuffer, ModelParams


@dataclass
class ForwardResult:
    group: GroupOutputs
    individual: IndividualOutputs
    decoder_cache: DecoderCache
    individual_cache: DecoderCache
    heads_cache: HeadsCache
    anchored: np.ndarray


def model_forward(params: ModelParams, tokens: np.ndarray) -> ForwardResult:
    group_h, decoder_cache = decoder_forward(params, tokens)
    anchors, anchored = anchor_tokens(tokens, params["queries"].shape[0])
    individual_h, individual_cache = decoder_forward(params, tokens, anchors)
    individual_ref = anchor_reference(anchors, anchored, params["ref_logits"])
    group, individual, heads_cache = heads_forward(params, group_h, params["ref_logits"], individual_h, individual_ref)
    return ForwardResult(group, individual, decoder_cache, individual_cache, heads_cache, anchored)


def backward(params: ModelParams, forward: ForwardResult, loss: LossBreakdown, grads: GradientBuffer = None) -> GradientBuffer:
    """
    Reverse-mode gradients of loss.total with respect to every parameter.

    Args:
        params: The parameters the forward pass ran with
        forward: Result of model_forward on the same inputs
        loss: Combined group and individual breakdown of that forward pass
        grads: Buffer to accumulate into; a fresh zero buffer when omitted

    Raises:
        InputError: If the loss carries no gradients or they do not fit the forward pass
    """
    if loss.group_grads is None or loss.individual_grads is None:
        raise InputError("loss breakdown is missing group or individual gradients")
    if grads is None:
        grads = GradientBuffer.like(params)
    d_h, d_ref, d_ind, d_ind_ref = heads_backward(params, forward.heads_cache, loss.group_grads, loss.individual_grads, grads)
    # anchored rows take their reference from the data
    d_ind_ref[forward.anchored] = 0.0
    grads.accumulate("ref_logits", d_ref + d_ind_ref)
    decoder_backward(params, forward.decoder_cache, d_h, grads)
    decoder_backward(params, forward.individual_cache, d_ind, grads)
    return grads
