// Copyright (c) 2026 the soundit authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "soundit/tensor.hpp"

namespace soundit {

// Pooled soundscape embedding (B, d) plus the token sequence (B, L, D_s) the
// conditioner projects into keys and values.
struct SoundscapeCondition {
    Tensor e_s;
    Tensor s_tokens;
};

// Everything a denoiser call can be conditioned on. When a null flag is set
// the model substitutes its learned null embedding for that modality, which
// is the unconditional branch of guidance.
struct ConditioningBundle {
    SoundscapeCondition sound;
    Tensor e_c;
    bool null_sound = false;
    bool null_scene = false;

    ConditioningBundle as_null() const {
        ConditioningBundle b = *this;
        b.null_sound = true;
        b.null_scene = true;
        return b;
    }
};

}  // namespace soundit
