#pragma once

#include "glfc/error.hpp"
#include "glfc/random.hpp"
#include "glfc/tensor.hpp"
#include "glfc/dual.hpp"
#include "glfc/model.hpp"
#include "glfc/autodiff.hpp"
#include "glfc/losses.hpp"
#include "glfc/dataset.hpp"
#include "glfc/stream.hpp"
#include "glfc/local_trainer.hpp"
#include "glfc/prototype.hpp"
#include "glfc/checkpoint.hpp"
#include "glfc/config.hpp"
#include "glfc/federation.hpp"
#include "glfc/harness.hpp"
