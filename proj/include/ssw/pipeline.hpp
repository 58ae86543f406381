#pragma once

#include "ssw/pipeline/augment.hpp"
#include "ssw/pipeline/checkpoint.hpp"
#include "ssw/pipeline/dataset.hpp"
#include "ssw/pipeline/evaluate.hpp"
#include "ssw/pipeline/optim.hpp"
#include "ssw/pipeline/png_io.hpp"
#include "ssw/pipeline/predict.hpp"
#include "ssw/pipeline/trainer.hpp"
