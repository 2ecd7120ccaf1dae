#pragma once

#include "aigen/version.hpp"
#include "aigen/core/adam.hpp"
#include "aigen/core/error.hpp"
#include "aigen/core/functional.hpp"
#include "aigen/core/gradcheck.hpp"
#include "aigen/core/ops.hpp"
#include "aigen/core/random.hpp"
#include "aigen/core/tape.hpp"
#include "aigen/core/tensor.hpp"
#include "aigen/text/vocab.hpp"
#include "aigen/multimodal/trajectory.hpp"
#include "aigen/multimodal/assembly.hpp"
#include "aigen/model/transformer.hpp"
#include "aigen/model/generator.hpp"
#include "aigen/model/discriminator.hpp"
#include "aigen/train/config.hpp"
#include "aigen/train/trainer.hpp"
#include "aigen/train/checkpoint.hpp"
#include "aigen/synth/world.hpp"
#include "aigen/eval/metrics.hpp"
#include "aigen/eval/report.hpp"
