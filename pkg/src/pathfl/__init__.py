"""Federated segmentation with collaborative style enhancement, feature alignment and stratified similarity aggregation."""
