#pragma once

#include "tamkit/caption_parser.hpp"
#include "tamkit/checkpoint.hpp"
#include "tamkit/common.hpp"
#include "tamkit/config.hpp"
#include "tamkit/encoder.hpp"
#include "tamkit/eval.hpp"
#include "tamkit/image_io.hpp"
#include "tamkit/losses.hpp"
#include "tamkit/synthetic.hpp"
#include "tamkit/tam.hpp"
#include "tamkit/text_embedding.hpp"
#include "tamkit/trainer.hpp"
