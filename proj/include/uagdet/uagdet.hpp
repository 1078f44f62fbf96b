#pragma once

#include "uagdet/errors.hpp"
#include "uagdet/geometry/rotated_box.hpp"
#include "uagdet/numeric/rng.hpp"
#include "uagdet/numeric/tensor.hpp"
#include "uagdet/numeric/ops.hpp"
#include "uagdet/numeric/sgd.hpp"
#include "uagdet/numeric/grad_check.hpp"
#include "uagdet/numeric/checkpoint.hpp"
#include "uagdet/model_dims.hpp"
#include "uagdet/detection/box_coder.hpp"
#include "uagdet/detection/proposal.hpp"
#include "uagdet/detection/head.hpp"
#include "uagdet/uncertainty/mc_dropout.hpp"
#include "uagdet/graph/object_graph.hpp"
#include "uagdet/refine/gnn.hpp"
#include "uagdet/pipeline/config.hpp"
#include "uagdet/pipeline/scene.hpp"
#include "uagdet/pipeline/synthetic.hpp"
#include "uagdet/pipeline/ap.hpp"
#include "uagdet/pipeline/model.hpp"
#include "uagdet/pipeline/inference.hpp"
#include "uagdet/pipeline/train.hpp"
#include "uagdet/pipeline/evaluate.hpp"
#include "uagdet/pipeline/experiment.hpp"
