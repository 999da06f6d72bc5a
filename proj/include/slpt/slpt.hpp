#pragma once

#include "slpt/codec/codec.hpp"
#include "slpt/diffcore/adam.hpp"
#include "slpt/diffcore/checkpoint.hpp"
#include "slpt/diffcore/gradcheck.hpp"
#include "slpt/geometry/unproject.hpp"
#include "slpt/harness/evaluate.hpp"
#include "slpt/harness/gradcheck_suite.hpp"
#include "slpt/harness/train.hpp"
#include "slpt/heads/heads.hpp"
#include "slpt/losses/losses.hpp"
#include "slpt/plvae/plvae.hpp"
#include "slpt/rasterizer/rasterizer.hpp"
