#pragma once

#include "qualiteacher/image.hpp"
#include "qualiteacher/image_io.hpp"
#include "qualiteacher/rng.hpp"
#include "qualiteacher/iqa.hpp"
#include "qualiteacher/synthbench.hpp"
#include "qualiteacher/tensor.hpp"
#include "qualiteacher/restorer.hpp"
#include "qualiteacher/pseudo_label.hpp"
#include "qualiteacher/losses.hpp"
#include "qualiteacher/config.hpp"
#include "qualiteacher/trainer.hpp"
#include "qualiteacher/checkpoint.hpp"
#include "qualiteacher/run.hpp"
#include "qualiteacher/evaluation.hpp"
#include "qualiteacher/gradcheck.hpp"
