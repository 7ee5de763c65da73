/*
 * SPDX-FileCopyrightText: Copyright (c) 2026 The sonoray Authors. All rights reserved.
 * SPDX-License-Identifier: Apache-2.0
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef SONORAY_HPP
#define SONORAY_HPP

#include "sonoray/acoustics.hpp"
#include "sonoray/error.hpp"
#include "sonoray/geometry.hpp"
#include "sonoray/gradients.hpp"
#include "sonoray/image_io.hpp"
#include "sonoray/imaging.hpp"
#include "sonoray/impedance_map.hpp"
#include "sonoray/manifest.hpp"
#include "sonoray/metrics.hpp"
#include "sonoray/parallel.hpp"
#include "sonoray/phantom.hpp"
#include "sonoray/vec3.hpp"
#include "sonoray/volume.hpp"
#include "sonoray/volume_io.hpp"

#endif /* SONORAY_HPP */
