#pragma once

#include "ctxemo/checkpoint.hpp"
#include "ctxemo/classifier.hpp"
#include "ctxemo/corpus.hpp"
#include "ctxemo/encoder.hpp"
#include "ctxemo/ensemble.hpp"
#include "ctxemo/errors.hpp"
#include "ctxemo/evaluation.hpp"
#include "ctxemo/model.hpp"
#include "ctxemo/optim.hpp"
#include "ctxemo/pooling.hpp"
#include "ctxemo/run_config.hpp"
#include "ctxemo/synthetic.hpp"
#include "ctxemo/tensor.hpp"
#include "ctxemo/tokenizer.hpp"
#include "ctxemo/training.hpp"
