// Copyright (c) 2026, The ckqti Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "ckqti/attention.hpp"
#include "ckqti/bench.hpp"
#include "ckqti/bm25.hpp"
#include "ckqti/checkpoint.hpp"
#include "ckqti/corpus.hpp"
#include "ckqti/error.hpp"
#include "ckqti/eval.hpp"
#include "ckqti/gradcheck.hpp"
#include "ckqti/impact_index.hpp"
#include "ckqti/kernel_pooling.hpp"
#include "ckqti/memory.hpp"
#include "ckqti/model.hpp"
#include "ckqti/ops.hpp"
#include "ckqti/pipeline.hpp"
#include "ckqti/ranking.hpp"
#include "ckqti/selftest.hpp"
#include "ckqti/synthetic.hpp"
#include "ckqti/tensor.hpp"
#include "ckqti/training.hpp"
