/*
 * Copyright 2026 The tagclip-cpp Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef TAGCLIP_TAGCLIP_HPP_
#define TAGCLIP_TAGCLIP_HPP_

#include "tagclip/bundle.hpp"
#include "tagclip/errors.hpp"
#include "tagclip/eval.hpp"
#include "tagclip/image_io.hpp"
#include "tagclip/numeric.hpp"
#include "tagclip/tagging.hpp"
#include "tagclip/text_encoder.hpp"
#include "tagclip/tokenizer.hpp"
#include "tagclip/transformer.hpp"
#include "tagclip/vision_encoder.hpp"

#endif  // TAGCLIP_TAGCLIP_HPP_
