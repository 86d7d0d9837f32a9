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

import hashlib
import json
import logging
import os

from . import Error

logger = logging.getLogger(__name__)

BLOCK_SIZE = 65536
HASH_ALGORITHM = 'sha1'

def hash_file(path):
    hasher = hashlib.new(HASH_ALGORITHM)
    try:
        with open(path, 'rb') as f:
            block = f.read(BLOCK_SIZE)
            while len(block) > 0:
                hasher.update(block)
                block = f.read(BLOCK_SIZE)
    except OSError as e:
        raise Error('Cannot read {}: {}'.format(path, e.strerror))
    return hasher.hexdigest()

def digests(paths, relative_to):
    """Map paths, relative to `relative_to`, to their digests."""
    return {os.path.relpath(path, relative_to): hash_file(path) for path in sorted(paths)}

def save_json(path, data):
    with open(path, 'w') as f:
        json.dump(data, f, indent=2, sort_keys=True)
        f.write('\n')
    logger.debug('Wrote %s', path)

def load_json(path):
    try:
        with open(path) as f:
            return json.load(f)
    except OSError as e:
        raise Error('Cannot read {}: {}'.format(path, e.strerror))
    except json.JSONDecodeError as e:
        raise Error('{}: malformed JSON at line {}'.format(path, e.lineno))

def write_jsonl(path, records):
    with open(path, 'w') as f:
        for record in records:
            f.write(json.dumps(record, sort_keys=True))
            f.write('\n')
    logger.debug('Wrote %s', path)

def numbered_jsonl(path):
    """Yield (line number, record) pairs of a JSON-lines file, skipping blank lines."""
    try:
        with open(path) as f:
            for lineno, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                try:
                    yield lineno, json.loads(line)
                except json.JSONDecodeError as e:
                    raise Error('{}:{}: malformed record: {}'.format(path, lineno, e.msg))
    except OSError as e:
        raise Error('Cannot read {}: {}'.format(path, e.strerror))

def read_jsonl(path):
    for _, record in numbered_jsonl(path):
        yield record

def save_object(path, obj):
    save_json(path, obj.to_dict())

def load_object(path, cls):
    return cls.from_dict(load_json(path))
