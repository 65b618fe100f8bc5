# jobs/run_manager.py

import json
import logging
import os
import uuid
from datetime import datetime
from enum import Enum
from typing import Any, Dict, List, Optional

logger = logging.getLogger(__name__)


class RunStatus(Enum):
    PENDING = "pending"        # Run created but not started
    RUNNING = "running"        # Training steps in progress
    COMPLETED = "completed"    # All steps done
    FAILED = "failed"          # Diverged or crashed
    ABORTED = "aborted"        # Interrupted by the user


class RunManager:
    def __init__(self, runs_dir: str = "workspace/runs"):
        """Initialize the RunManager with the specified run directory."""
        self.runs_dir = runs_dir
        os.makedirs(self.runs_dir, exist_ok=True)

        # In-memory index of runs
        self.runs_index: Dict[str, Dict[str, Any]] = {}
        self._load_runs_index()

    def _load_runs_index(self) -> None:
        """Load all run records from the run directory into the in-memory index."""
        run_files = sorted(f for f in os.listdir(self.runs_dir) if f.startswith("run-") and f.endswith(".json"))

        for run_file in run_files:
            try:
                with open(os.path.join(self.runs_dir, run_file), "r") as f:
                    run_data = json.load(f)
            except (OSError, ValueError) as e:
                logger.warning("skipping unreadable run record %s: %s", run_file, e)
                continue
            run_id = run_data.get("id")
            if run_id:
                self.runs_index[run_id] = self._summary(run_data, run_file)

    @staticmethod
    def _summary(run_data: Dict[str, Any], run_file: str) -> Dict[str, Any]:
        return {
            "id": run_data["id"],
            "name": run_data.get("name"),
            "status": run_data.get("status"),
            "step": run_data.get("step", 0),
            "created_at": run_data.get("created_at"),
            "updated_at": run_data.get("updated_at"),
            "file": run_file,
        }

    def create_run(self, name: str, config: Dict[str, Any]) -> str:
        """
        Create a new run record.

        Args:
            name: Short human-readable name of the run
            config: The training configuration, as plain JSON data

        Returns:
            The ID of the newly created run
        """
        run_id = uuid.uuid4().hex[:12]
        timestamp = datetime.now().isoformat()

        run_data = {
            "id": run_id,
            "name": name,
            "status": RunStatus.PENDING.value,
            "created_at": timestamp,
            "updated_at": timestamp,
            "config": config,
            "step": 0,
            "losses": {},
            "artifacts": [],
            "metadata": {},
        }
        self._save_run(run_id, run_data)
        return run_id

    def get_run(self, run_id: str) -> Optional[Dict[str, Any]]:
        """
        Get the full record of a run.

        Returns:
            The run data as a dictionary, or None if not found
        """
        if run_id not in self.runs_index:
            return None

        run_file = self.runs_index[run_id]["file"]
        try:
            with open(os.path.join(self.runs_dir, run_file), "r") as f:
                return json.load(f)
        except (OSError, ValueError) as e:
            logger.error("error loading run %s: %s", run_id, e)
            return None

    def list_runs(self, limit: int = 20, status: Optional[RunStatus] = None) -> List[Dict[str, Any]]:
        """
        List run summaries, newest first, optionally filtered by status.

        Args:
            limit: Maximum number of runs to return
            status: Filter by status (optional)
        """
        runs = list(self.runs_index.values())

        if status:
            status_value = status.value if isinstance(status, RunStatus) else status
            runs = [run for run in runs if run["status"] == status_value]

        runs.sort(key=lambda x: x.get("created_at") or "", reverse=True)
        return runs[:limit]

    def _update(self, run_id: str, **changes) -> bool:
        run_data = self.get_run(run_id)
        if not run_data:
            return False
        run_data.update(changes)
        run_data["updated_at"] = datetime.now().isoformat()
        return self._save_run(run_id, run_data)

    def update_run_status(self, run_id: str, status: RunStatus, error: Optional[str] = None) -> bool:
        """
        Update the status of a run.

        Args:
            run_id: The ID of the run to update
            status: The new status to set
            error: Failure message to record along with a failed status

        Returns:
            True if successful, False otherwise
        """
        changes: Dict[str, Any] = {"status": status.value}
        if error is not None:
            changes["error"] = error
        return self._update(run_id, **changes)

    def record_progress(self, run_id: str, step: int, losses: Dict[str, float]) -> bool:
        """Store the latest step and loss components of a run."""
        return self._update(run_id, step=step, losses=losses)

    def add_artifact(self, run_id: str, artifact_type: str, path: str, metadata: Dict = None) -> bool:
        """
        Add an artifact (checkpoint, log, report) to a run.

        Args:
            run_id: The ID of the run
            artifact_type: Type of artifact (checkpoint, log, report)
            path: Path to the artifact
            metadata: Additional metadata about the artifact
        """
        run_data = self.get_run(run_id)
        if not run_data:
            return False

        run_data["artifacts"].append({
            "type": artifact_type,
            "path": path,
            "created_at": datetime.now().isoformat(),
            "metadata": metadata or {},
        })
        run_data["updated_at"] = datetime.now().isoformat()
        return self._save_run(run_id, run_data)

    def set_metadata(self, run_id: str, key: str, value: Any) -> bool:
        run_data = self.get_run(run_id)
        if not run_data:
            return False

        run_data.setdefault("metadata", {})[key] = value
        run_data["updated_at"] = datetime.now().isoformat()
        return self._save_run(run_id, run_data)

    def abort_run(self, run_id: str) -> bool:
        return self.update_run_status(run_id, RunStatus.ABORTED)

    def _save_run(self, run_id: str, run_data: Dict[str, Any]) -> bool:
        """
        Save run data to its file and refresh the index entry.

        Returns:
            True if successful, False otherwise
        """
        run_file = f"run-{run_id}.json"
        run_path = os.path.join(self.runs_dir, run_file)

        try:
            with open(run_path, "w") as f:
                json.dump(run_data, f, indent=2)
        except OSError as e:
            logger.error("error saving run %s: %s", run_id, e)
            return False
        self.runs_index[run_id] = self._summary(run_data, run_file)
        return True

    def delete_run(self, run_id: str) -> bool:
        """
        Delete a run record; its artifacts are left in place.

        Returns:
            True if successful, False otherwise
        """
        if run_id not in self.runs_index:
            return False

        run_path = os.path.join(self.runs_dir, self.runs_index[run_id]["file"])
        try:
            if os.path.exists(run_path):
                os.remove(run_path)
        except OSError as e:
            logger.error("error deleting run %s: %s", run_id, e)
            return False
        del self.runs_index[run_id]
        return True
