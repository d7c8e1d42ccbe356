#pragma once

#include "devnet/autodiff.hpp"
#include "devnet/bag.hpp"
#include "devnet/datagen.hpp"
#include "devnet/errors.hpp"
#include "devnet/evaluator.hpp"
#include "devnet/explainer.hpp"
#include "devnet/io.hpp"
#include "devnet/mil.hpp"
#include "devnet/network.hpp"
#include "devnet/prior.hpp"
#include "devnet/tensor.hpp"
#include "devnet/trainer.hpp"

namespace devnet {
inline constexpr const char* kVersion = "0.1.0";
}
