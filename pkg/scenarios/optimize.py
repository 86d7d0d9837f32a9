# This file is part of scenarios.
#
# Copyright (C) 2024 Martin Kampas <martin.kampas@ubedi.net>
#
# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation, either version 3 of the License, or (at
# your option) any later version.
#
# This program is distributed in the hope that it will be useful, but
# WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the GNU
# General Public License for more details.
#
# You should have received a copy of the GNU General Public License
# along with this program.  If not, see <http://www.gnu.org/licenses/>.

import logging

logger = logging.getLogger(__name__)

MAX_BACKTRACKS = 40
STEP_GROWTH = 1.5

def identity(x):
    return x

class Descent:
    """Projected gradient descent with per-step backtracking.

    The step is shrunk by `backtrack_factor` until the loss does not
    increase and grown by STEP_GROWTH after every accepted step. Every
    accepted iterate has loss not above its predecessor.
    """

    def __init__(self, loss, gradient, step, backtrack_factor, project=identity):
        self.loss = loss
        self.gradient = gradient
        self.step = step
        self.backtrack_factor = backtrack_factor
        self.project = project
        self.stalled = False

    def run(self, x, steps, current=None):
        if current is None:
            current = self.loss(x)
        self.stalled = False

        for _ in range(steps):
            g = self.gradient(x)
            initial_step = self.step
            for _ in range(MAX_BACKTRACKS):
                candidate = self.project(x - self.step * g)
                value = self.loss(candidate)
                if value <= current:
                    break
                self.step *= self.backtrack_factor
            else:
                logger.debug('No descent after %d backtracks, step %g', MAX_BACKTRACKS, self.step)
                self.step = initial_step
                self.stalled = True
                break

            x, current = candidate, value
            self.step *= STEP_GROWTH

        return x, current
