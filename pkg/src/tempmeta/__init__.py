"""Tracking and temporal uncertainty metrics for video instance segmentation."""
